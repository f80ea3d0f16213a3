//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every forward operation in order; [`Tape::backward`]
//! replays the tape in reverse and accumulates vector-Jacobian products into
//! per-node gradients. Segment operations (keyed reductions and softmax over
//! edge lists) are first-class so graph aggregation differentiates like any
//! other op.
//!
//! Conventions:
//! - all arithmetic in f64; no broadcasting except scalar-times-tensor,
//! - `relu'(0) = 0`; `max` routes its subgradient to the first extremal index,
//! - a tape is single-threaded; distinct tapes may run concurrently.

use std::sync::Arc;

use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// Reduction mode for [`Tape::segment_reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    MatMul(ValueId, ValueId),
    Scale(ValueId, f64),
    /// Elementwise product with a tape scalar (the one permitted broadcast).
    ScaleBy(ValueId, ValueId),
    Sum(ValueId),
    Mean(ValueId),
    /// Global max; saves the first extremal flat index.
    MaxAll(ValueId, usize),
    Relu(ValueId),
    LeakyRelu(ValueId, f64),
    Exp(ValueId),
    Log(ValueId),
    Square(ValueId),
    Sqrt(ValueId),
    Concat { parts: Vec<ValueId>, axis: usize },
    Slice { input: ValueId, axis: usize, start: usize, len: usize },
    Reshape(ValueId),
    NormSq(ValueId),
    GatherRows { input: ValueId, indices: Arc<Vec<usize>> },
    SegmentReduce {
        input: ValueId,
        seg: Arc<Vec<usize>>,
        num: usize,
        mode: SegmentMode,
        /// For Max: winning input row per (segment, column); usize::MAX when empty.
        winners: Vec<usize>,
    },
    SegmentSoftmax { input: ValueId, seg: Arc<Vec<usize>>, num: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the traced output w.r.t. `id`, zeros if no path reached it.
    pub fn wrt(&self, id: ValueId, tape: &Tape) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).shape().to_vec()),
        }
    }

    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Whether `id` is a trainable leaf.
    pub fn is_trainable(&self, id: ValueId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    /// Records a constant input; no gradient is reported for it.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf { trainable: false }, value)
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf { trainable: true }, value)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.leaf(Tensor::scalar(v))
    }

    fn binary_shapes(&self, name: &str, a: ValueId, b: ValueId) {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert_eq!(sa, sb, "{name}: shape mismatch {sa:?} vs {sb:?}");
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.binary_shapes("add", a, b);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Add(a, b), Tensor::from_vec(shape, data))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.binary_shapes("sub", a, b);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Sub(a, b), Tensor::from_vec(shape, data))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.binary_shapes("mul", a, b);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Mul(a, b), Tensor::from_vec(shape, data))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul: inner dims differ, {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let (m, n) = (va.rows(), vb.cols());
        let data = matmul(va, vb);
        self.push(Op::MatMul(a, b), Tensor::from_vec(vec![m, n], data))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Scale(a, c), Tensor::from_vec(shape, data))
    }

    /// Elementwise multiply by a tape scalar (shape `[1]`).
    pub fn scale_by(&mut self, a: ValueId, s: ValueId) -> ValueId {
        assert!(
            self.value(s).is_scalar(),
            "scale_by: scale operand must be scalar, got {:?}",
            self.value(s).shape()
        );
        let sv = self.value(s).item();
        let data = self.value(a).data().iter().map(|x| x * sv).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::ScaleBy(a, s), Tensor::from_vec(shape, data))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    /// Global maximum; subgradient goes to the first extremal index.
    pub fn max_all(&mut self, a: ValueId) -> ValueId {
        let d = self.value(a).data();
        let mut best = 0usize;
        for (i, &x) in d.iter().enumerate() {
            if x > d[best] {
                best = i;
            }
        }
        let v = d[best];
        self.push(Op::MaxAll(a, best), Tensor::scalar(v))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Relu(a), Tensor::from_vec(shape, data))
    }

    pub fn leaky_relu(&mut self, a: ValueId, alpha: f64) -> ValueId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { alpha * x })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::LeakyRelu(a, alpha), Tensor::from_vec(shape, data))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data().iter().map(|x| x.exp()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Exp(a), Tensor::from_vec(shape, data))
    }

    pub fn log(&mut self, a: ValueId) -> ValueId {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                assert!(!(x < 0.0), "log: negative input {x}");
                x.ln() // NaN propagates; the caller's finiteness checks see it
            })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Log(a), Tensor::from_vec(shape, data))
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        let data = self.value(a).data().iter().map(|x| x * x).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Square(a), Tensor::from_vec(shape, data))
    }

    pub fn sqrt(&mut self, a: ValueId) -> ValueId {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                assert!(!(x < 0.0), "sqrt: negative input {x}");
                x.sqrt()
            })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Sqrt(a), Tensor::from_vec(shape, data))
    }

    /// Reciprocal of a strictly positive tensor, composed as exp(-log(x)).
    pub fn recip_pos(&mut self, a: ValueId) -> ValueId {
        let l = self.log(a);
        let n = self.scale(l, -1.0);
        self.exp(n)
    }

    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> ValueId {
        assert!(!parts.is_empty(), "concat: no parts");
        assert!(axis < 2, "concat: axis {axis} unsupported");
        let rank = self.value(parts[0]).shape().len();
        if rank == 1 || axis == 0 {
            let cols = self.value(parts[0]).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.cols(), cols, "concat axis 0: column mismatch");
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            let shape = if rank == 1 { vec![data.len()] } else { vec![rows, cols] };
            return self.push(Op::Concat { parts: parts.to_vec(), axis: 0 }, Tensor::from_vec(shape, data));
        }
        // axis == 1: same row count, columns appended
        let rows = self.value(parts[0]).rows();
        let total_cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = vec![0.0; rows * total_cols];
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat axis 1: row mismatch");
            let c = v.cols();
            for r in 0..rows {
                data[r * total_cols + off..r * total_cols + off + c]
                    .copy_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
            off += c;
        }
        self.push(
            Op::Concat { parts: parts.to_vec(), axis: 1 },
            Tensor::from_vec(vec![rows, total_cols], data),
        )
    }

    /// Contiguous slice along `axis` (0: rows / elements, 1: columns).
    pub fn slice(&mut self, input: ValueId, axis: usize, start: usize, len: usize) -> ValueId {
        let v = self.value(input);
        assert!(axis < 2, "slice: axis {axis} unsupported");
        let value = if v.shape().len() == 1 {
            assert_eq!(axis, 0, "slice: rank-1 tensors slice on axis 0");
            assert!(start + len <= v.numel(), "slice: out of range");
            Tensor::from_vec(vec![len], v.data()[start..start + len].to_vec())
        } else if axis == 0 {
            let c = v.cols();
            assert!(start + len <= v.rows(), "slice: row range out of bounds");
            Tensor::from_vec(vec![len, c], v.data()[start * c..(start + len) * c].to_vec())
        } else {
            let (r, c) = (v.rows(), v.cols());
            assert!(start + len <= c, "slice: column range out of bounds");
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&v.data()[i * c + start..i * c + start + len]);
            }
            Tensor::from_vec(vec![r, len], data)
        };
        self.push(Op::Slice { input, axis, start, len }, value)
    }

    pub fn reshape(&mut self, input: ValueId, shape: Vec<usize>) -> ValueId {
        let v = self.value(input);
        let numel: usize = shape.iter().product();
        assert_eq!(numel, v.numel(), "reshape: {:?} -> {:?} changes element count", v.shape(), shape);
        let value = Tensor::from_vec(shape, v.data().to_vec());
        self.push(Op::Reshape(input), value)
    }

    /// Sum of squared entries (squared Frobenius norm), a scalar.
    pub fn norm_sq(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Op::NormSq(a), Tensor::scalar(s))
    }

    /// Rows of `input` selected by `indices`, duplicates allowed.
    pub fn gather_rows(&mut self, input: ValueId, indices: Arc<Vec<usize>>) -> ValueId {
        let v = self.value(input);
        let c = v.cols();
        let rows = v.rows();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            assert!(i < rows, "gather_rows: index {i} out of {rows} rows");
            data.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::from_vec(vec![indices.len(), c], data);
        self.push(Op::GatherRows { input, indices }, value)
    }

    /// Keyed row reduction: output row `s` combines input rows with
    /// `seg[r] == s`. Empty segments produce zero rows in every mode.
    pub fn segment_reduce(
        &mut self,
        input: ValueId,
        seg: Arc<Vec<usize>>,
        num: usize,
        mode: SegmentMode,
    ) -> ValueId {
        let v = self.value(input);
        assert_eq!(v.rows(), seg.len(), "segment_reduce: ids/rows mismatch");
        for &s in seg.iter() {
            assert!(s < num, "segment_reduce: segment id {s} >= {num}");
        }
        let c = v.cols();
        let mut out = vec![0.0; num * c];
        let mut winners = Vec::new();
        match mode {
            SegmentMode::Sum | SegmentMode::Mean => {
                let mut counts = vec![0usize; num];
                for (r, &s) in seg.iter().enumerate() {
                    counts[s] += 1;
                    for j in 0..c {
                        out[s * c + j] += v.data()[r * c + j];
                    }
                }
                if mode == SegmentMode::Mean {
                    for s in 0..num {
                        if counts[s] > 0 {
                            let inv = 1.0 / counts[s] as f64;
                            for j in 0..c {
                                out[s * c + j] *= inv;
                            }
                        }
                    }
                }
            }
            SegmentMode::Max => {
                winners = vec![usize::MAX; num * c];
                for (r, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        let slot = s * c + j;
                        let x = v.data()[r * c + j];
                        if winners[slot] == usize::MAX || x > out[slot] {
                            out[slot] = x;
                            winners[slot] = r;
                        }
                    }
                }
                // empty segments stay at zero
                for slot in 0..num * c {
                    if winners[slot] == usize::MAX {
                        out[slot] = 0.0;
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![num, c], out);
        self.push(Op::SegmentReduce { input, seg, num, mode, winners }, value)
    }

    /// Softmax within each segment of a rank-1 score vector, numerically
    /// stabilized by the per-segment maximum.
    pub fn segment_softmax(&mut self, input: ValueId, seg: Arc<Vec<usize>>, num: usize) -> ValueId {
        let v = self.value(input);
        assert_eq!(v.shape().len(), 1, "segment_softmax: expects rank-1 scores");
        assert_eq!(v.numel(), seg.len(), "segment_softmax: ids/scores mismatch");
        for &s in seg.iter() {
            assert!(s < num, "segment_softmax: segment id {s} >= {num}");
        }
        let d = v.data();
        let mut seg_max = vec![f64::NEG_INFINITY; num];
        for (r, &s) in seg.iter().enumerate() {
            if d[r] > seg_max[s] {
                seg_max[s] = d[r];
            }
        }
        let mut out: Vec<f64> = seg.iter().zip(d).map(|(&s, &x)| (x - seg_max[s]).exp()).collect();
        let mut seg_sum = vec![0.0; num];
        for (r, &s) in seg.iter().enumerate() {
            seg_sum[s] += out[r];
        }
        for (r, &s) in seg.iter().enumerate() {
            out[r] /= seg_sum[s];
        }
        let value = Tensor::from_vec(vec![seg.len()], out);
        self.push(Op::SegmentSoftmax { input, seg, num }, value)
    }

    /// Reverse pass from a scalar output. Panics if `output` is not scalar.
    pub fn backward(&self, output: ValueId) -> Gradients {
        assert!(
            self.value(output).is_scalar(),
            "backward: output must be scalar, got shape {:?}",
            self.value(output).shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let gd = g.data();
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, gd);
                    self.accum(&mut grads, *b, gd);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, gd);
                    let neg: Vec<f64> = gd.iter().map(|x| -x).collect();
                    self.accum(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> =
                        gd.iter().zip(self.value(*b).data()).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> =
                        gd.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).collect();
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for t in 0..n {
                                acc += gd[i * n + t] * vb.data()[j * n + t];
                            }
                            da[i * k + j] = acc;
                        }
                    }
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for j in 0..k {
                            let av = va.data()[i * k + j];
                            if av != 0.0 {
                                for t in 0..n {
                                    db[j * n + t] += av * gd[i * n + t];
                                }
                            }
                        }
                    }
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = gd.iter().map(|g| g * c).collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::ScaleBy(a, s) => {
                    let sv = self.value(*s).item();
                    let da: Vec<f64> = gd.iter().map(|g| g * sv).collect();
                    let ds: f64 =
                        gd.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *s, &[ds]);
                }
                Op::Sum(a) => {
                    let da = vec![gd[0]; self.value(*a).numel()];
                    self.accum(&mut grads, *a, &da);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    let da = vec![gd[0] / n as f64; n];
                    self.accum(&mut grads, *a, &da);
                }
                Op::MaxAll(a, argmax) => {
                    let mut da = vec![0.0; self.value(*a).numel()];
                    da[*argmax] = gd[0];
                    self.accum(&mut grads, *a, &da);
                }
                Op::Relu(a) => {
                    let da: Vec<f64> = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::LeakyRelu(a, alpha) => {
                    let da: Vec<f64> = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { alpha * g })
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Exp(a) => {
                    let da: Vec<f64> =
                        gd.iter().zip(self.nodes[idx].value.data()).map(|(g, y)| g * y).collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Log(a) => {
                    let da: Vec<f64> =
                        gd.iter().zip(self.value(*a).data()).map(|(g, x)| g / x).collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Square(a) => {
                    let da: Vec<f64> = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, x)| 2.0 * g * x)
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Sqrt(a) => {
                    let da: Vec<f64> = gd
                        .iter()
                        .zip(self.nodes[idx].value.data())
                        .map(|(g, y)| 0.5 * g / y)
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        let mut off = 0;
                        for &p in parts {
                            let n = self.value(p).numel();
                            self.accum(&mut grads, p, &gd[off..off + n]);
                            off += n;
                        }
                    } else {
                        let rows = self.nodes[idx].value.rows();
                        let total_cols = self.nodes[idx].value.cols();
                        let mut off = 0;
                        for &p in parts {
                            let c = self.value(p).cols();
                            let mut dp = vec![0.0; rows * c];
                            for r in 0..rows {
                                dp[r * c..(r + 1) * c].copy_from_slice(
                                    &gd[r * total_cols + off..r * total_cols + off + c],
                                );
                            }
                            self.accum(&mut grads, p, &dp);
                            off += c;
                        }
                    }
                }
                Op::Slice { input, axis, start, len } => {
                    let v = self.value(*input);
                    let mut di = vec![0.0; v.numel()];
                    if v.shape().len() == 1 || *axis == 0 {
                        let c = v.cols();
                        let c = if v.shape().len() == 1 { 1 } else { c };
                        di[start * c..(start + len) * c].copy_from_slice(gd);
                    } else {
                        let (r, c) = (v.rows(), v.cols());
                        for i in 0..r {
                            di[i * c + start..i * c + start + len]
                                .copy_from_slice(&gd[i * len..(i + 1) * len]);
                        }
                    }
                    self.accum(&mut grads, *input, &di);
                }
                Op::Reshape(input) => {
                    self.accum(&mut grads, *input, gd);
                }
                Op::NormSq(a) => {
                    let da: Vec<f64> = self.value(*a).data().iter().map(|x| 2.0 * gd[0] * x).collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::GatherRows { input, indices } => {
                    let v = self.value(*input);
                    let c = v.cols();
                    let mut di = vec![0.0; v.numel()];
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            di[i * c + j] += gd[r * c + j];
                        }
                    }
                    self.accum(&mut grads, *input, &di);
                }
                Op::SegmentReduce { input, seg, num, mode, winners } => {
                    let v = self.value(*input);
                    let c = v.cols();
                    let mut di = vec![0.0; v.numel()];
                    match mode {
                        SegmentMode::Sum => {
                            for (r, &s) in seg.iter().enumerate() {
                                for j in 0..c {
                                    di[r * c + j] += gd[s * c + j];
                                }
                            }
                        }
                        SegmentMode::Mean => {
                            let mut counts = vec![0usize; *num];
                            for &s in seg.iter() {
                                counts[s] += 1;
                            }
                            for (r, &s) in seg.iter().enumerate() {
                                let inv = 1.0 / counts[s] as f64;
                                for j in 0..c {
                                    di[r * c + j] += gd[s * c + j] * inv;
                                }
                            }
                        }
                        SegmentMode::Max => {
                            for s in 0..*num {
                                for j in 0..c {
                                    let w = winners[s * c + j];
                                    if w != usize::MAX {
                                        di[w * c + j] += gd[s * c + j];
                                    }
                                }
                            }
                        }
                    }
                    self.accum(&mut grads, *input, &di);
                }
                Op::SegmentSoftmax { input, seg, num } => {
                    let y = self.nodes[idx].value.data();
                    let mut seg_dot = vec![0.0; *num];
                    for (r, &s) in seg.iter().enumerate() {
                        seg_dot[s] += gd[r] * y[r];
                    }
                    let di: Vec<f64> = seg
                        .iter()
                        .enumerate()
                        .map(|(r, &s)| y[r] * (gd[r] - seg_dot[s]))
                        .collect();
                    self.accum(&mut grads, *input, &di);
                }
            }
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: ValueId, contribution: &[f64]) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            None => {
                let shape = self.value(id).shape().to_vec();
                grads[id.0] = Some(Tensor::from_vec(shape, contribution.to_vec()));
            }
        }
    }
}

/// Max relative error between the tape gradient of `f` and central finite
/// differences at `point`: `max_i |analytic_i - fd_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Tape, ValueId) -> ValueId,
{
    assert!(eps > 0.0, "grad_check: eps must be positive");
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let out = f(&mut tape, x);
    let grads = tape.backward(out);
    let analytic = grads.wrt(x, &tape);

    let eval = |p: &Tensor| -> f64 {
        let mut t = Tape::new();
        let x = t.leaf(p.clone());
        let o = f(&mut t, x);
        t.value(o).item()
    };

    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut hi = point.clone();
        hi.data_mut()[i] += eps;
        let mut lo = point.clone();
        lo.data_mut()[i] -= eps;
        let fd = (eval(&hi) - eval(&lo)) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - fd).abs() / a.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    worst
}
