//! Op tape for reverse-mode differentiation.
//!
//! Every forward primitive appends a node; node ids are topologically
//! ordered by construction, so the backward pass is a single reverse
//! sweep. A finished tape is read-only and safe to share.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    AddScalar(NodeId, T),
    MulScalar(NodeId, T),
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax {
        input: NodeId,
        n: usize,
    },
    LogSumExp(NodeId),
    EmbedLookup {
        table: NodeId,
        ids: Vec<usize>,
    },
    Sum(NodeId),
    L2NormSq(NodeId),
    MaxOverAxis {
        input: NodeId,
        argmax: Vec<usize>,
    },
    MinOverAxis {
        input: NodeId,
        argmin: Vec<usize>,
    },
    MaxExcept {
        input: NodeId,
        argmax: usize,
    },
    Gather {
        input: NodeId,
        index: usize,
    },
    Concat(NodeId, NodeId),
    Slice {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Reshape(NodeId),
    Stack(Vec<NodeId>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording tape; see module docs.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
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

    /// Leaf that participates in gradients.
    pub fn var(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from gradient propagation.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Neg(a)
            | Op::AddScalar(a, _)
            | Op::MulScalar(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LogSumExp(a)
            | Op::Sum(a)
            | Op::L2NormSq(a)
            | Op::Reshape(a) => self.needs(*a),
            Op::Softmax { input, .. }
            | Op::MaxOverAxis { input, .. }
            | Op::MinOverAxis { input, .. }
            | Op::MaxExcept { input, .. }
            | Op::Gather { input, .. }
            | Op::Slice { input, .. } => self.needs(*input),
            Op::MatMul { lhs, rhs, .. } => self.needs(*lhs) || self.needs(*rhs),
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => self.needs(*input) || self.needs(*kernel) || bias.map_or(false, |b| self.needs(b)),
            Op::EmbedLookup { table, .. } => self.needs(*table),
            Op::Stack(ids) => ids.iter().any(|id| self.needs(*id)),
        };
        self.push(value, op, needs_grad)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shapes(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    // ---- forward primitives -------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += bv;
        }
        Ok(self.push_op(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= bv;
        }
        Ok(self.push_op(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o = *o * bv;
        }
        Ok(self.push_op(out, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = -*o;
        }
        self.push_op(out, Op::Neg(a))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o += s;
        }
        self.push_op(out, Op::AddScalar(a, s))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = *o * s;
        }
        self.push_op(out, Op::MulScalar(a, s))
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.value(lhs).shape(), self.value(rhs).shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::shapes("matmul", format!("{ls:?} x {rs:?}")));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul(
            self.value(lhs).data(),
            self.value(rhs).data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        Ok(self.push_op(out, Op::MatMul { lhs, rhs, m, k, n }))
    }

    /// NHWC conv: input `[h,w,cin]`, kernel `[kh,kw,cin,cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let is = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if is.len() != 3 || ks.len() != 4 || is[2] != ks[2] {
            return Err(Error::shapes(
                "conv2d",
                format!("input {is:?}, kernel {ks:?}"),
            ));
        }
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [ks[3]] {
                return Err(Error::shapes(
                    "conv2d",
                    format!("bias {bs:?}, expected [{}]", ks[3]),
                ));
            }
        }
        if stride == 0 {
            return Err(Error::shapes("conv2d", "stride must be >= 1".to_string()));
        }
        let (h, w, cin) = (is[0], is[1], is[2]);
        let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shapes(
                "conv2d",
                format!("kernel {ks:?} larger than padded input {is:?}"),
            ));
        }
        let oh = kernels::conv_out_dim(h, kh, stride, pad);
        let ow = kernels::conv_out_dim(w, kw, stride, pad);
        let mut out = Tensor::zeros(&[oh, ow, cout]);
        kernels::conv2d(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            out.data_mut(),
        );
        Ok(self.push_op(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            if *o < T::zero() {
                *o = T::zero();
            }
        }
        self.push_op(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = o.tanh();
        }
        self.push_op(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = kernels::sigmoid(*o);
        }
        self.push_op(out, Op::Sigmoid(a))
    }

    /// Softmax over the last axis (rows of a matrix, or a whole vector).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let n = match shape.last() {
            Some(&n) if n > 0 => n,
            _ => return Err(Error::shapes("softmax", format!("input {shape:?}"))),
        };
        let mut out = Tensor::zeros(&shape);
        kernels::softmax_rows(self.value(a).data(), n, out.data_mut());
        Ok(self.push_op(out, Op::Softmax { input: a, n }))
    }

    /// log(sum(exp(x))) over all entries, to a scalar.
    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(Error::shapes("log_sum_exp", "empty input".to_string()));
        }
        let v = kernels::log_sum_exp(self.value(a).data());
        Ok(self.push_op(Tensor::scalar(v), Op::LogSumExp(a)))
    }

    /// Row lookup: table `[v, d]`, ids -> `[len(ids), d]`.
    pub fn embed_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let ts = self.value(table).shape().to_vec();
        if ts.len() != 2 {
            return Err(Error::shapes("embed_lookup", format!("table {ts:?}")));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shapes(
                "embed_lookup",
                format!("id {bad} out of range for table with {v} rows"),
            ));
        }
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (row, &id) in ids.iter().enumerate() {
            out.data_mut()[row * d..(row + 1) * d]
                .copy_from_slice(&self.value(table).data()[id * d..(id + 1) * d]);
        }
        Ok(self.push_op(
            out,
            Op::EmbedLookup {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Sum of all entries, to a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).data().iter().copied().sum();
        self.push_op(Tensor::scalar(v), Op::Sum(a))
    }

    /// Squared Euclidean norm of all entries, to a scalar.
    pub fn l2_norm_sq(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).data().iter().map(|&x| x * x).sum();
        self.push_op(Tensor::scalar(v), Op::L2NormSq(a))
    }

    /// Max reduction. `axis = None` reduces everything to a scalar;
    /// `axis = Some(1)` reduces the rows of a matrix to a vector.
    /// Ties take the first index.
    pub fn max_over_axis(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let (out, argmax) = self.reduce_extremum(a, axis, false)?;
        Ok(self.push_op(out, Op::MaxOverAxis { input: a, argmax }))
    }

    /// Min reduction with the same axis conventions as [`Self::max_over_axis`].
    pub fn min_over_axis(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let (out, argmin) = self.reduce_extremum(a, axis, true)?;
        Ok(self.push_op(out, Op::MinOverAxis { input: a, argmin }))
    }

    fn reduce_extremum(
        &self,
        a: NodeId,
        axis: Option<usize>,
        min: bool,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shapes("max/min_over_axis", "empty input".to_string()));
        }
        match axis {
            None => {
                let idx = if min {
                    kernels::argmin(t.data())
                } else {
                    kernels::argmax(t.data())
                };
                Ok((Tensor::scalar(t.data()[idx]), vec![idx]))
            }
            Some(1) if t.shape().len() == 2 => {
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let mut vals = Vec::with_capacity(m);
                let mut idxs = Vec::with_capacity(m);
                for row in t.data().chunks(n) {
                    let idx = if min {
                        kernels::argmin(row)
                    } else {
                        kernels::argmax(row)
                    };
                    idxs.push(idx);
                    vals.push(row[idx]);
                }
                Ok((Tensor::new(vec![m], vals), idxs))
            }
            Some(ax) => Err(Error::shapes(
                "max/min_over_axis",
                format!("axis {ax} unsupported for shape {:?}", t.shape()),
            )),
        }
    }

    /// Max over all entries except the flat index `exclude`, to a scalar.
    pub fn max_except(&mut self, a: NodeId, exclude: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.len() < 2 || exclude >= t.len() {
            return Err(Error::shapes(
                "max_except",
                format!("len {} exclude {exclude}", t.len()),
            ));
        }
        let (argmax, v) = kernels::max_excluding(t.data(), exclude);
        Ok(self.push_op(Tensor::scalar(v), Op::MaxExcept { input: a, argmax }))
    }

    /// Picks a single entry by flat index, to a scalar.
    pub fn gather(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(Error::shapes(
                "gather",
                format!("index {index} out of {}", t.len()),
            ));
        }
        let v = t.data()[index];
        Ok(self.push_op(Tensor::scalar(v), Op::Gather { input: a, index }))
    }

    /// Concatenates two row vectors `[1,a]+[1,b] -> [1,a+b]`
    /// (or plain vectors `[a]+[b] -> [a+b]`).
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let shape = match (sa, sb) {
            ([n], [m]) => vec![n + m],
            ([1, n], [1, m]) => vec![1, n + m],
            _ => return Err(Error::shapes("concat", format!("{sa:?} + {sb:?}"))),
        };
        let mut data = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        Ok(self.push_op(Tensor::new(shape, data), Op::Concat(a, b)))
    }

    /// Contiguous slice of the flattened data, kept 1-D (or `[1,len]`
    /// when the input was a row vector).
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(a);
        if start + len > t.len() {
            return Err(Error::shapes(
                "slice",
                format!("[{start}..{}] out of {}", start + len, t.len()),
            ));
        }
        let shape = if t.shape().len() == 2 && t.shape()[0] == 1 {
            vec![1, len]
        } else {
            vec![len]
        };
        let data = t.data()[start..start + len].to_vec();
        Ok(self.push_op(Tensor::new(shape, data), Op::Slice { input: a, start, len }))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::shapes(
                "reshape",
                format!("{:?} -> {shape:?}", t.shape()),
            ));
        }
        let out = t.clone().reshaped(shape);
        Ok(self.push_op(out, Op::Reshape(a)))
    }

    /// Stacks scalar nodes into a vector `[k]`.
    pub fn stack(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::shapes("stack", "no inputs".to_string()));
        }
        let mut data = Vec::with_capacity(ids.len());
        for &id in ids {
            let t = self.value(id);
            if !t.is_scalar() {
                return Err(Error::shapes(
                    "stack",
                    format!("non-scalar input of shape {:?}", t.shape()),
                ));
            }
            data.push(t.item());
        }
        Ok(self.push_op(Tensor::new(vec![ids.len()], data), Op::Stack(ids.to_vec())))
    }

    // ---- backward ------------------------------------------------------

    /// Gradient of the scalar `root` with respect to every node that
    /// requires one. Unreached leaves read back as zero.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad && id != root.0 {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], target: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); self.nodes[target.0].value.len()]);
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, g));
                self.accumulate(grads, *b, |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, g));
                self.accumulate(grads, *b, |db| sub_into(db, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |da| {
                    for ((d, &gv), &bvv) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * bvv;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, &gv), &avv) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * avv;
                    }
                });
            }
            Op::Neg(a) => self.accumulate(grads, *a, |da| sub_into(da, g)),
            Op::AddScalar(a, _) => self.accumulate(grads, *a, |da| add_into(da, g)),
            Op::MulScalar(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                });
            }
            Op::MatMul { lhs, rhs, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (lv, rv) = (self.value(*lhs).data(), self.value(*rhs).data());
                self.accumulate(grads, *lhs, |da| {
                    kernels::matmul_grad_lhs(g, rv, m, k, n, da);
                });
                self.accumulate(grads, *rhs, |db| {
                    kernels::matmul_grad_rhs(lv, g, m, k, n, db);
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let is = self.value(*input).shape();
                let ks = self.value(*kernel).shape();
                let (h, w, cin) = (is[0], is[1], is[2]);
                let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
                let (iv, kv) = (self.value(*input).data(), self.value(*kernel).data());
                let need_in = self.needs(*input);
                let need_k = self.needs(*kernel);
                let need_b = bias.map_or(false, |b| self.needs(b));
                let mut di = if need_in {
                    Some(vec![T::zero(); iv.len()])
                } else {
                    None
                };
                let mut dk = if need_k {
                    Some(vec![T::zero(); kv.len()])
                } else {
                    None
                };
                let mut db = if need_b { Some(vec![T::zero(); cout]) } else { None };
                kernels::conv2d_backward(
                    iv,
                    kv,
                    g,
                    h,
                    w,
                    cin,
                    kh,
                    kw,
                    cout,
                    *stride,
                    *pad,
                    di.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(di) = di {
                    self.accumulate(grads, *input, |d| add_into(d, &di));
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *kernel, |d| add_into(d, &dk));
                }
                if let (Some(db), Some(b)) = (db, *bias) {
                    self.accumulate(grads, b, |d| add_into(d, &db));
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |da| {
                    for ((d, &gv), &avv) in da.iter_mut().zip(g).zip(av) {
                        if avv > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let yv = node.value.data();
                self.accumulate(grads, *a, |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(yv) {
                        *d += gv * (T::one() - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = node.value.data();
                self.accumulate(grads, *a, |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(yv) {
                        *d += gv * y * (T::one() - y);
                    }
                });
            }
            Op::Softmax { input, n } => {
                let p = node.value.data();
                let n = *n;
                self.accumulate(grads, *input, |dx| {
                    kernels::softmax_rows_backward(p, g, n, dx);
                });
            }
            Op::LogSumExp(a) => {
                // d lse / dx_i = softmax(x)_i
                let xv = self.value(*a).data();
                let go = g[0];
                let mut p = vec![T::zero(); xv.len()];
                kernels::softmax_rows(xv, xv.len(), &mut p);
                self.accumulate(grads, *a, |da| {
                    for (d, &pv) in da.iter_mut().zip(&p) {
                        *d += go * pv;
                    }
                });
            }
            Op::EmbedLookup { table, ids } => {
                let d = self.value(*table).shape()[1];
                self.accumulate(grads, *table, |dt| {
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &g[row * d..(row + 1) * d];
                        let dst = &mut dt[id * d..(id + 1) * d];
                        add_into(dst, src);
                    }
                });
            }
            Op::Sum(a) => {
                let go = g[0];
                self.accumulate(grads, *a, |da| {
                    for d in da.iter_mut() {
                        *d += go;
                    }
                });
            }
            Op::L2NormSq(a) => {
                let go = g[0];
                let xv = self.value(*a).data();
                let two = T::from_f64(2.0);
                self.accumulate(grads, *a, |da| {
                    for (d, &x) in da.iter_mut().zip(xv) {
                        *d += go * two * x;
                    }
                });
            }
            Op::MaxOverAxis { input, argmax } => {
                self.route_extremum(grads, *input, argmax, g);
            }
            Op::MinOverAxis { input, argmin } => {
                self.route_extremum(grads, *input, argmin, g);
            }
            Op::MaxExcept { input, argmax } => {
                let go = g[0];
                let idx = *argmax;
                self.accumulate(grads, *input, |da| da[idx] += go);
            }
            Op::Gather { input, index } => {
                let go = g[0];
                let idx = *index;
                self.accumulate(grads, *input, |da| da[idx] += go);
            }
            Op::Concat(a, b) => {
                let an = self.value(*a).len();
                self.accumulate(grads, *a, |da| add_into(da, &g[..an]));
                self.accumulate(grads, *b, |db| add_into(db, &g[an..]));
            }
            Op::Slice { input, start, len } => {
                let (start, len) = (*start, *len);
                self.accumulate(grads, *input, |da| {
                    add_into(&mut da[start..start + len], &g[..len]);
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |da| add_into(da, g)),
            Op::Stack(ids) => {
                for (slot, &sid) in ids.iter().enumerate() {
                    let gv = g[slot];
                    self.accumulate(grads, sid, |da| da[0] += gv);
                }
            }
        }
    }

    fn route_extremum(
        &self,
        grads: &mut [Option<Vec<T>>],
        input: NodeId,
        indices: &[usize],
        g: &[T],
    ) {
        let shape = self.value(input).shape();
        if indices.len() == 1 && g.len() == 1 {
            let (idx, go) = (indices[0], g[0]);
            self.accumulate(grads, input, |da| da[idx] += go);
        } else {
            let n = shape[1];
            self.accumulate(grads, input, |da| {
                for (row, (&idx, &gv)) in indices.iter().zip(g).enumerate() {
                    da[row * n + idx] += gv;
                }
            });
        }
    }
}

/// Gradient map produced by [`Tape::backward`]: node id -> tensor.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for the node, or `None` if it was never reached.
    pub fn get(&self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.index()]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[id.index()].clone(), g.clone()))
    }

    /// Gradient for the node, zeros if unreached.
    pub fn get_or_zero(&self, id: NodeId) -> Tensor<T> {
        match &self.grads[id.index()] {
            Some(g) => Tensor::new(self.shapes[id.index()].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[id.index()]),
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sub_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d -= s;
    }
}
