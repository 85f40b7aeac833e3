//! Reverse-mode autodiff over a recorded op tape.
//!
//! Each op appends a node holding its forward value; `backward` walks the
//! tape in reverse. The network here is tiny, so there is no fusion, no
//! broadcasting beyond what the ops state, and shapes are checked eagerly
//! (mismatches are programmer errors and panic).

use crate::error::NnError;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    /// Elementwise sum of same-shaped tensors.
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    /// [m,k] x [k,n] -> [m,n]
    MatMul(NodeId, NodeId),
    /// [m,k] x [n,k]^T -> [m,n]
    MatMulTransB(NodeId, NodeId),
    /// [m,k] x [k] -> [m]
    MatVec(NodeId, NodeId),
    /// input [c_in, l], weight [c_out, c_in, 3], bias [c_out] -> [c_out, l];
    /// stride 1, zero padding 1.
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Stable softmax along each row of a rank-2 tensor.
    RowSoftmax(NodeId),
    /// log softmax(logits)[index] -> scalar
    CategoricalLogProb {
        logits: NodeId,
        index: usize,
    },
    /// Entropy of softmax(logits) in nats -> scalar
    Entropy(NodeId),
    /// Sum of all elements -> scalar
    Sum(NodeId),
    /// Concatenation of rank-1 tensors.
    Concat(Vec<NodeId>),
    /// Column `col` of a rank-2 tensor -> rank-1
    SliceCol {
        input: NodeId,
        col: usize,
    },
    /// Row `row` of a rank-2 tensor -> rank-1
    PickRow {
        input: NodeId,
        row: usize,
    },
    /// Same data, new shape (label carried by the node's value).
    Reshape(NodeId),
    /// [r,c] -> [c,r]
    Transpose(NodeId),
}

#[derive(Debug, Clone)]
struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    param_bindings: Vec<(String, NodeId)>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Graph<S> {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node from `mark` onward. Lets an episode loop reuse the
    /// registered parameter leaves without regrowing the tape.
    pub fn truncate(&mut self, mark: usize) {
        assert!(
            mark >= self
                .param_bindings
                .iter()
                .map(|(_, id)| id.0 + 1)
                .max()
                .unwrap_or(0),
            "truncate would drop parameter leaves"
        );
        self.nodes.truncate(mark);
        self.grads.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn any_requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.requires(id))
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (used directly in tests; parameters go through
    /// [`Graph::param`]).
    pub fn variable(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.input(Tensor::scalar(crate::tensor::s(value)))
    }

    /// Register a named parameter from the store as a differentiable leaf.
    /// After `backward`, [`Graph::accumulate_param_grads`] pushes the
    /// gradient back under the same name.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> NodeId {
        let value = store
            .value(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        let id = self.push(value.clone(), Op::Leaf, true);
        self.param_bindings.push((name.to_string(), id));
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn add_n(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "add_n of nothing");
        let shape = self.nodes[ids[0].0].value.shape().to_vec();
        let mut data = vec![S::zero(); shape.iter().product()];
        for &id in ids {
            let v = &self.nodes[id.0].value;
            assert_eq!(v.shape(), &shape[..], "add_n shape mismatch");
            for (acc, &x) in data.iter_mut().zip(v.data()) {
                *acc = *acc + x;
            }
        }
        let rg = self.any_requires(ids);
        self.push(Tensor::new(shape, data), Op::AddN(ids.to_vec()), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| x * factor);
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.nodes[a.0].value.dims2();
        let (k2, n) = self.nodes[b.0].value.dims2();
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = va.data()[i * k + kk];
                let brow = &vb.data()[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + aik * brow[j];
                }
            }
        }
        let rg = self.any_requires(&[a, b]);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// a [m,k] times b-transposed where b is [n,k]; the natural layout for
    /// dot-product attention scores.
    pub fn matmul_trans_b(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.nodes[a.0].value.dims2();
        let (n, k2) = self.nodes[b.0].value.dims2();
        assert_eq!(k, k2, "matmul_trans_b inner dims {k} vs {k2}");
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let arow = &va.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &vb.data()[j * k..(j + 1) * k];
                let mut acc = S::zero();
                for kk in 0..k {
                    acc = acc + arow[kk] * brow[kk];
                }
                out[i * n + j] = acc;
            }
        }
        let rg = self.any_requires(&[a, b]);
        self.push(Tensor::new(vec![m, n], out), Op::MatMulTransB(a, b), rg)
    }

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let (m, k) = self.nodes[a.0].value.dims2();
        let vx = &self.nodes[x.0].value;
        assert_eq!(
            vx.shape(),
            [k],
            "matvec: matrix [{m},{k}] vs vector {:?}",
            vx.shape()
        );
        let (va, vx) = (&self.nodes[a.0].value, &self.nodes[x.0].value);
        let mut out = vec![S::zero(); m];
        for i in 0..m {
            let arow = &va.data()[i * k..(i + 1) * k];
            let mut acc = S::zero();
            for kk in 0..k {
                acc = acc + arow[kk] * vx.data()[kk];
            }
            out[i] = acc;
        }
        let rg = self.any_requires(&[a, x]);
        self.push(Tensor::new(vec![m], out), Op::MatVec(a, x), rg)
    }

    /// 1D cross-correlation along the length axis, filter width 3, stride 1,
    /// zero padding 1, plus a per-output-channel bias. Output length equals
    /// input length, including L=1 (padding covers both neighbors).
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let (c_in, l) = self.nodes[input.0].value.dims2();
        let (c_out, c_in2, width) = self.nodes[weight.0].value.dims3();
        assert_eq!(
            c_in, c_in2,
            "conv1d channel mismatch: input {c_in}, weight {c_in2}"
        );
        assert_eq!(width, 3, "conv1d expects filter width 3");
        assert_eq!(
            self.nodes[bias.0].value.shape(),
            [c_out],
            "conv1d bias shape"
        );
        let vx = &self.nodes[input.0].value;
        let vw = &self.nodes[weight.0].value;
        let vb = &self.nodes[bias.0].value;
        let mut out = vec![S::zero(); c_out * l];
        for o in 0..c_out {
            let orow = &mut out[o * l..(o + 1) * l];
            let b = vb.data()[o];
            for v in orow.iter_mut() {
                *v = b;
            }
            for c in 0..c_in {
                let xrow = &vx.data()[c * l..(c + 1) * l];
                for t in 0..3usize {
                    let w = vw.data()[(o * c_in + c) * 3 + t];
                    // output position i reads input position i + t - 1
                    let (start, end) = match t {
                        0 => (1, l),
                        1 => (0, l),
                        _ => (0, l.saturating_sub(1)),
                    };
                    for i in start..end {
                        orow[i] = orow[i] + w * xrow[i + t - 1];
                    }
                }
            }
        }
        let rg = self.any_requires(&[input, weight, bias]);
        self.push(
            Tensor::new(vec![c_out, l], out),
            Op::Conv1d {
                input,
                weight,
                bias,
            },
            rg,
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0]
            .value
            .map(|x| if x > S::zero() { x } else { S::zero() });
        let rg = self.requires(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = S::one();
        let value = self.nodes[a.0].value.map(|x| one / (one + (-x).exp()));
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| x.tanh());
        let rg = self.requires(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let (rows, cols) = self.nodes[a.0].value.dims2();
        assert!(cols > 0, "row_softmax over empty rows");
        let va = &self.nodes[a.0].value;
        let mut out = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let row = va.row(r);
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut total = S::zero();
            for (o, &x) in orow.iter_mut().zip(row) {
                *o = (x - max).exp();
                total = total + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / total;
            }
        }
        let rg = self.requires(a);
        self.push(Tensor::new(vec![rows, cols], out), Op::RowSoftmax(a), rg)
    }

    pub fn categorical_log_prob(&mut self, logits: NodeId, index: usize) -> NodeId {
        let v = &self.nodes[logits.0].value;
        assert_eq!(v.rank(), 1, "categorical_log_prob wants rank-1 logits");
        assert!(index < v.len(), "class index {index} out of {}", v.len());
        let lp = log_probs(v.data());
        let value = Tensor::scalar(lp[index]);
        let rg = self.requires(logits);
        self.push(value, Op::CategoricalLogProb { logits, index }, rg)
    }

    pub fn entropy(&mut self, logits: NodeId) -> NodeId {
        let v = &self.nodes[logits.0].value;
        assert_eq!(v.rank(), 1, "entropy wants rank-1 logits");
        let lp = log_probs(v.data());
        let mut h = S::zero();
        for &l in &lp {
            let p = l.exp();
            if p > S::zero() {
                h = h - p * l;
            }
        }
        let rg = self.requires(logits);
        self.push(Tensor::scalar(h), Op::Entropy(logits), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.nodes[a.0]
            .value
            .data()
            .iter()
            .fold(S::zero(), |acc, &x| acc + x);
        let rg = self.requires(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn concat(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        for &id in ids {
            let v = &self.nodes[id.0].value;
            assert_eq!(
                v.rank(),
                1,
                "concat wants rank-1 parts, got {:?}",
                v.shape()
            );
            data.extend_from_slice(v.data());
        }
        let len = data.len();
        let rg = self.any_requires(ids);
        self.push(Tensor::new(vec![len], data), Op::Concat(ids.to_vec()), rg)
    }

    pub fn slice_col(&mut self, input: NodeId, col: usize) -> NodeId {
        let (rows, cols) = self.nodes[input.0].value.dims2();
        assert!(col < cols, "column {col} out of {cols}");
        let v = &self.nodes[input.0].value;
        let data: Vec<S> = (0..rows).map(|r| v.data()[r * cols + col]).collect();
        let rg = self.requires(input);
        self.push(
            Tensor::new(vec![rows], data),
            Op::SliceCol { input, col },
            rg,
        )
    }

    pub fn pick_row(&mut self, input: NodeId, row: usize) -> NodeId {
        let (rows, _cols) = self.nodes[input.0].value.dims2();
        assert!(row < rows, "row {row} out of {rows}");
        let value = Tensor::new(
            vec![self.nodes[input.0].value.shape()[1]],
            self.nodes[input.0].value.row(row).to_vec(),
        );
        let rg = self.requires(input);
        self.push(value, Op::PickRow { input, row }, rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> NodeId {
        let value = self.nodes[a.0].value.clone().reshaped(shape);
        let rg = self.requires(a);
        self.push(value, Op::Reshape(a), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (rows, cols) = self.nodes[a.0].value.dims2();
        let v = &self.nodes[a.0].value;
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = v.data()[r * cols + c];
            }
        }
        let rg = self.requires(a);
        self.push(Tensor::new(vec![cols, rows], data), Op::Transpose(a), rg)
    }

    /// Scaled dot-product attention: weights = row_softmax(q k^T / sqrt(d)),
    /// output = weights v. Returns (output, weights).
    pub fn attention(&mut self, queries: NodeId, keys: NodeId, values: NodeId) -> (NodeId, NodeId) {
        let (_q, d) = self.nodes[queries.0].value.dims2();
        let (l, d2) = self.nodes[keys.0].value.dims2();
        assert!(d > 0, "attention with zero-width queries");
        assert_eq!(d, d2, "attention query/key width mismatch");
        assert_eq!(
            self.nodes[values.0].value.dims2().0,
            l,
            "attention key/value count mismatch"
        );
        let scores = self.matmul_trans_b(queries, keys);
        let scaled = self.scale(scores, crate::tensor::s(1.0 / (d as f64).sqrt()));
        let weights = self.row_softmax(scaled);
        let out = self.matmul(weights, values);
        (out, weights)
    }

    /// Dense layer: weight [out,in] times x plus bias [out].
    pub fn dense(&mut self, weight: NodeId, bias: NodeId, x: NodeId) -> NodeId {
        let wx = self.matvec(weight, x);
        self.add(wx, bias)
    }

    pub fn check_finite(&self, id: NodeId, context: &str) -> Result<(), NnError> {
        if self.nodes[id.0].value.is_finite() {
            Ok(())
        } else {
            Err(NnError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Reverse pass from `root`, seeding with ones. Gradients land in the
    /// graph and stay readable until the next backward or truncate.
    pub fn backward(&mut self, root: NodeId) {
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        if !self.nodes[root.0].requires_grad {
            return;
        }
        let seed = self.nodes[root.0].value.map(|_| S::one());
        self.grads[root.0] = Some(seed);

        for id in (0..=root.0).rev() {
            if self.grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let gout = self.grads[id].take().unwrap();
            let op = self.nodes[id].op.clone();
            self.propagate(id, &op, &gout);
            self.grads[id] = Some(gout);
        }
    }

    fn accum(&mut self, id: NodeId, delta: Tensor<S>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => {
                for (acc, &x) in g.data_mut().iter_mut().zip(delta.data()) {
                    *acc = *acc + x;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, id: usize, op: &Op<S>, gout: &Tensor<S>) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(*a, gout.clone());
                self.accum(*b, gout.clone());
            }
            Op::AddN(ids) => {
                for &p in ids {
                    self.accum(p, gout.clone());
                }
            }
            Op::Sub(a, b) => {
                self.accum(*a, gout.clone());
                self.accum(*b, gout.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = elementwise_mul(gout, &self.nodes[b.0].value);
                let gb = elementwise_mul(gout, &self.nodes[a.0].value);
                self.accum(*a, ga);
                self.accum(*b, gb);
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accum(*a, gout.map(|x| x * f));
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let (_, n) = self.nodes[b.0].value.dims2();
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                if self.requires(*a) {
                    // dA = dY B^T
                    let mut ga = vec![S::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout.data()[i * n + j];
                            let brow = vb.data();
                            for kk in 0..k {
                                ga[i * k + kk] = ga[i * k + kk] + g * brow[kk * n + j];
                            }
                        }
                    }
                    self.accum(*a, Tensor::new(vec![m, k], ga));
                }
                if self.requires(*b) {
                    // dB = A^T dY
                    let mut gb = vec![S::zero(); k * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let aik = va.data()[i * k + kk];
                            for j in 0..n {
                                gb[kk * n + j] = gb[kk * n + j] + aik * gout.data()[i * n + j];
                            }
                        }
                    }
                    self.accum(*b, Tensor::new(vec![k, n], gb));
                }
            }
            Op::MatMulTransB(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let (n, _) = self.nodes[b.0].value.dims2();
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                if self.requires(*a) {
                    // dA = dY B
                    let mut ga = vec![S::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout.data()[i * n + j];
                            let brow = &vb.data()[j * k..(j + 1) * k];
                            for kk in 0..k {
                                ga[i * k + kk] = ga[i * k + kk] + g * brow[kk];
                            }
                        }
                    }
                    self.accum(*a, Tensor::new(vec![m, k], ga));
                }
                if self.requires(*b) {
                    // dB = dY^T A
                    let mut gb = vec![S::zero(); n * k];
                    for i in 0..m {
                        let arow = &va.data()[i * k..(i + 1) * k];
                        for j in 0..n {
                            let g = gout.data()[i * n + j];
                            for kk in 0..k {
                                gb[j * k + kk] = gb[j * k + kk] + g * arow[kk];
                            }
                        }
                    }
                    self.accum(*b, Tensor::new(vec![n, k], gb));
                }
            }
            Op::MatVec(a, x) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let va = self.nodes[a.0].value.clone();
                let vx = self.nodes[x.0].value.clone();
                if self.requires(*a) {
                    let mut ga = vec![S::zero(); m * k];
                    for i in 0..m {
                        let g = gout.data()[i];
                        for kk in 0..k {
                            ga[i * k + kk] = g * vx.data()[kk];
                        }
                    }
                    self.accum(*a, Tensor::new(vec![m, k], ga));
                }
                if self.requires(*x) {
                    let mut gx = vec![S::zero(); k];
                    for i in 0..m {
                        let g = gout.data()[i];
                        let arow = &va.data()[i * k..(i + 1) * k];
                        for kk in 0..k {
                            gx[kk] = gx[kk] + g * arow[kk];
                        }
                    }
                    self.accum(*x, Tensor::new(vec![k], gx));
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
            } => {
                let (c_in, l) = self.nodes[input.0].value.dims2();
                let (c_out, _, _) = self.nodes[weight.0].value.dims3();
                let vx = self.nodes[input.0].value.clone();
                let vw = self.nodes[weight.0].value.clone();
                if self.requires(*input) {
                    let mut gx = vec![S::zero(); c_in * l];
                    for o in 0..c_out {
                        let grow = &gout.data()[o * l..(o + 1) * l];
                        for c in 0..c_in {
                            let gxrow = &mut gx[c * l..(c + 1) * l];
                            for t in 0..3usize {
                                let w = vw.data()[(o * c_in + c) * 3 + t];
                                let (start, end) = conv_range(t, l);
                                for i in start..end {
                                    gxrow[i + t - 1] = gxrow[i + t - 1] + w * grow[i];
                                }
                            }
                        }
                    }
                    self.accum(*input, Tensor::new(vec![c_in, l], gx));
                }
                if self.requires(*weight) {
                    let mut gw = vec![S::zero(); c_out * c_in * 3];
                    for o in 0..c_out {
                        let grow = &gout.data()[o * l..(o + 1) * l];
                        for c in 0..c_in {
                            let xrow = &vx.data()[c * l..(c + 1) * l];
                            for t in 0..3usize {
                                let (start, end) = conv_range(t, l);
                                let mut acc = S::zero();
                                for i in start..end {
                                    acc = acc + grow[i] * xrow[i + t - 1];
                                }
                                gw[(o * c_in + c) * 3 + t] = acc;
                            }
                        }
                    }
                    self.accum(*weight, Tensor::new(vec![c_out, c_in, 3], gw));
                }
                if self.requires(*bias) {
                    let mut gb = vec![S::zero(); c_out];
                    for o in 0..c_out {
                        let grow = &gout.data()[o * l..(o + 1) * l];
                        gb[o] = grow.iter().fold(S::zero(), |acc, &x| acc + x);
                    }
                    self.accum(*bias, Tensor::new(vec![c_out], gb));
                }
            }
            Op::Relu(a) => {
                let va = &self.nodes[a.0].value;
                let data = va
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                let delta = Tensor::new(va.shape().to_vec(), data);
                self.accum(*a, delta);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                let data = y
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&y, &g)| g * y * (S::one() - y))
                    .collect();
                let delta = Tensor::new(y.shape().to_vec(), data);
                self.accum(*a, delta);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let data = y
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&y, &g)| g * (S::one() - y * y))
                    .collect();
                let delta = Tensor::new(y.shape().to_vec(), data);
                self.accum(*a, delta);
            }
            Op::RowSoftmax(a) => {
                let y = self.nodes[id].value.clone();
                let (rows, cols) = y.dims2();
                let mut gx = vec![S::zero(); rows * cols];
                for r in 0..rows {
                    let yrow = y.row(r);
                    let grow = &gout.data()[r * cols..(r + 1) * cols];
                    let mut dot = S::zero();
                    for (y, g) in yrow.iter().zip(grow) {
                        dot = dot + *y * *g;
                    }
                    for c in 0..cols {
                        gx[r * cols + c] = yrow[c] * (grow[c] - dot);
                    }
                }
                self.accum(*a, Tensor::new(vec![rows, cols], gx));
            }
            Op::CategoricalLogProb { logits, index } => {
                let v = self.nodes[logits.0].value.clone();
                let g = gout.item();
                let lp = log_probs(v.data());
                let data: Vec<S> = lp
                    .iter()
                    .enumerate()
                    .map(|(j, &l)| {
                        let indicator = if j == *index { S::one() } else { S::zero() };
                        g * (indicator - l.exp())
                    })
                    .collect();
                self.accum(*logits, Tensor::new(vec![v.len()], data));
            }
            Op::Entropy(logits) => {
                let v = self.nodes[logits.0].value.clone();
                let h = self.nodes[id].value.item();
                let g = gout.item();
                let lp = log_probs(v.data());
                // dH/dl_j = -p_j (log p_j + H)
                let data: Vec<S> = lp.iter().map(|&l| -(g * l.exp() * (l + h))).collect();
                self.accum(*logits, Tensor::new(vec![v.len()], data));
            }
            Op::Sum(a) => {
                let g = gout.item();
                let delta = self.nodes[a.0].value.map(|_| g);
                self.accum(*a, delta);
            }
            Op::Concat(ids) => {
                let mut offset = 0;
                for &p in ids {
                    let len = self.nodes[p.0].value.len();
                    let delta = Tensor::new(vec![len], gout.data()[offset..offset + len].to_vec());
                    offset += len;
                    self.accum(p, delta);
                }
            }
            Op::SliceCol { input, col } => {
                let (rows, cols) = self.nodes[input.0].value.dims2();
                let mut gx = vec![S::zero(); rows * cols];
                for r in 0..rows {
                    gx[r * cols + col] = gout.data()[r];
                }
                self.accum(*input, Tensor::new(vec![rows, cols], gx));
            }
            Op::PickRow { input, row } => {
                let (rows, cols) = self.nodes[input.0].value.dims2();
                let mut gx = vec![S::zero(); rows * cols];
                gx[row * cols..(row + 1) * cols].copy_from_slice(gout.data());
                self.accum(*input, Tensor::new(vec![rows, cols], gx));
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let delta = Tensor::new(shape, gout.data().to_vec());
                self.accum(*a, delta);
            }
            Op::Transpose(a) => {
                let (rows, cols) = self.nodes[a.0].value.dims2();
                // gout is [cols, rows]; transpose back.
                let mut gx = vec![S::zero(); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gx[r * cols + c] = gout.data()[c * rows + r];
                    }
                }
                self.accum(*a, Tensor::new(vec![rows, cols], gx));
            }
        }
    }

    /// Add each bound parameter leaf's gradient into the store's
    /// accumulators.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) {
        for (name, id) in &self.param_bindings {
            if let Some(g) = self.grad(*id) {
                store.accumulate_grad(name, g);
            }
        }
    }
}

#[inline]
fn conv_range(t: usize, l: usize) -> (usize, usize) {
    match t {
        0 => (1, l),
        1 => (0, l),
        _ => (0, l.saturating_sub(1)),
    }
}

fn elementwise_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Stable log-softmax of a logit slice.
fn log_probs<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for &l in logits {
        total = total + (l - max).exp();
    }
    let lse = total.ln();
    logits.iter().map(|&l| l - max - lse).collect()
}
