use std::collections::BTreeMap;
use std::fmt;

use super::{Result, Tensor, TensorError};

/// Sigmoid inputs are clamped to this magnitude before `exp`.
const SIGMOID_CLAMP: f64 = 500.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelId {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Hadamard,
    Concat,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Negate,
    Scale,
    Shift,
    Sum,
    FrobeniusSq,
    Manhattan,
    Dot,
    Slice,
    Row,
    DivScalar,
    Log,
    Clamp,
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            KernelId::Leaf => "leaf",
            KernelId::MatMul => "matmul",
            KernelId::Transpose => "transpose",
            KernelId::Add => "add",
            KernelId::Sub => "sub",
            KernelId::Hadamard => "hadamard",
            KernelId::Concat => "concat",
            KernelId::Relu => "relu",
            KernelId::Sigmoid => "sigmoid",
            KernelId::Tanh => "tanh",
            KernelId::Softmax => "softmax",
            KernelId::Negate => "negate",
            KernelId::Scale => "scale",
            KernelId::Shift => "shift",
            KernelId::Sum => "sum",
            KernelId::FrobeniusSq => "frobenius_sq",
            KernelId::Manhattan => "manhattan",
            KernelId::Dot => "dot",
            KernelId::Slice => "slice",
            KernelId::Row => "row",
            KernelId::DivScalar => "div_scalar",
            KernelId::Log => "log",
            KernelId::Clamp => "clamp",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// Output of a kernel none of whose inputs needs a gradient.
    Untracked,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { input: Var, axis: usize },
    Negate(Var),
    Scale(Var, f64),
    Shift(Var),
    Sum(Var),
    FrobeniusSq(Var),
    Manhattan(Var, Var),
    Dot(Var, Var),
    Slice { input: Var, start: usize },
    Row { table: Var, index: usize },
    DivScalar(Var, Var),
    Log(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
}

impl Op {
    fn kernel(&self) -> KernelId {
        match self {
            Op::Leaf | Op::Untracked => KernelId::Leaf,
            Op::MatMul(..) => KernelId::MatMul,
            Op::Transpose(_) => KernelId::Transpose,
            Op::Add(..) => KernelId::Add,
            Op::Sub(..) => KernelId::Sub,
            Op::Hadamard(..) => KernelId::Hadamard,
            Op::Concat { .. } => KernelId::Concat,
            Op::Relu(_) => KernelId::Relu,
            Op::Sigmoid(_) => KernelId::Sigmoid,
            Op::Tanh(_) => KernelId::Tanh,
            Op::Softmax { .. } => KernelId::Softmax,
            Op::Negate(_) => KernelId::Negate,
            Op::Scale(..) => KernelId::Scale,
            Op::Shift(_) => KernelId::Shift,
            Op::Sum(_) => KernelId::Sum,
            Op::FrobeniusSq(_) => KernelId::FrobeniusSq,
            Op::Manhattan(..) => KernelId::Manhattan,
            Op::Dot(..) => KernelId::Dot,
            Op::Slice { .. } => KernelId::Slice,
            Op::Row { .. } => KernelId::Row,
            Op::DivScalar(..) => KernelId::DivScalar,
            Op::Log(_) => KernelId::Log,
            Op::Clamp { .. } => KernelId::Clamp,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that asked for one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_leaf: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_leaf.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.by_leaf.remove(&var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.by_leaf.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Linear record of kernel applications. Inputs always precede outputs, so
/// a single reverse sweep is a valid topological order for backward.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    /// Drops every value recorded after the first `len`. Vars pointing past
    /// `len` become invalid.
    pub fn rewind(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Kernel that produced `var`, or `None` for an untracked value.
    pub fn kernel_of(&self, var: Var) -> Option<KernelId> {
        match self.nodes.get(var.0)?.op {
            Op::Untracked => None,
            ref op => Some(op.kernel()),
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Untracked };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, kernel: KernelId, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            kernel,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    /// Matrix product. `[m,k]·[k,n] -> [m,n]` or `[m,k]·[k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = match (av.shape(), bv.shape()) {
            ([m, k], [k2]) if k == k2 => {
                let (m, k) = (*m, *k);
                let (ad, bd) = (av.data(), bv.data());
                let data = (0..m)
                    .map(|i| dot(&ad[i * k..(i + 1) * k], bd))
                    .collect();
                Tensor::new(vec![m], data)?
            }
            ([m, k], [k2, n]) if k == k2 => {
                let (m, k, n) = (*m, *k, *n);
                let (ad, bd) = (av.data(), bv.data());
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    let out_row = &mut data[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, &bpj) in out_row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                            *o += aip * bpj;
                        }
                    }
                }
                Tensor::new(vec![m, n], data)?
            }
            _ => return Err(self.shape_err(KernelId::MatMul, a, b)),
        };
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(TensorError::Shape {
                kernel: KernelId::Transpose,
                lhs: av.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = av.transpose();
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn zip_same(
        &mut self,
        kernel: KernelId,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.shape_err(kernel, a, b));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(KernelId::Add, a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(KernelId::Sub, a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(KernelId::Hadamard, a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Hadamard(a, b), &[a, b]))
    }

    /// Concatenate along `axis`. Scalars and vectors concatenate into a
    /// vector on axis 0; matrices concatenate on axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::EmptyAxis {
                kernel: KernelId::Concat,
                axis,
                shape: vec![],
            });
        };
        let first_rank = self.value(first).rank();
        let out = if first_rank <= 1 {
            if axis != 0 {
                return Err(TensorError::EmptyAxis {
                    kernel: KernelId::Concat,
                    axis,
                    shape: self.value(first).shape().to_vec(),
                });
            }
            let mut data = Vec::new();
            for &p in parts {
                let pv = self.value(p);
                if pv.rank() > 1 {
                    return Err(self.shape_err(KernelId::Concat, first, p));
                }
                data.extend_from_slice(pv.data());
            }
            Tensor::vector(data)
        } else {
            let (r0, c0) = (self.value(first).rows(), self.value(first).cols());
            for &p in parts {
                let pv = self.value(p);
                let ok = pv.rank() == 2
                    && match axis {
                        0 => pv.cols() == c0,
                        1 => pv.rows() == r0,
                        _ => false,
                    };
                if !ok {
                    return Err(self.shape_err(KernelId::Concat, first, p));
                }
            }
            if axis == 0 {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                    rows += self.value(p).rows();
                }
                Tensor::matrix(rows, c0, data)?
            } else {
                let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::matrix(r0, cols, data)?
            }
        };
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor {
            shape: av.shape().to_vec(),
            data: av.data().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn negate(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| -x);
        self.push(out, Op::Negate(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| c * x);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        self.push(out, Op::Shift(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.map(a, |x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { input: a, lo, hi }, &[a])
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let empty = || TensorError::EmptyAxis {
            kernel: KernelId::Softmax,
            axis,
            shape: av.shape().to_vec(),
        };
        if axis >= av.rank() {
            return Err(empty());
        }
        let mut out = av.clone();
        for_each_lane(av.shape(), axis, |idx| softmax_lane(&mut out.data, &idx));
        Ok(self.push(out, Op::Softmax { input: a, axis }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Squared Frobenius norm, `sum(x^2)`.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().map(|x| x * x).sum());
        self.push(out, Op::FrobeniusSq(a), &[a])
    }

    /// Sum of absolute differences.
    pub fn manhattan(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.shape_err(KernelId::Manhattan, a, b));
        }
        let d = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        Ok(self.push(Tensor::scalar(d), Op::Manhattan(a, b), &[a, b]))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 1 || av.shape() != bv.shape() {
            return Err(self.shape_err(KernelId::Dot, a, b));
        }
        let d = dot(av.data(), bv.data());
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b), &[a, b]))
    }

    /// Contiguous sub-vector `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 1 || len == 0 || start + len > av.len() {
            return Err(TensorError::Shape {
                kernel: KernelId::Slice,
                lhs: av.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = Tensor::vector(av.data()[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { input: a, start }, &[a]))
    }

    /// Row `index` of a matrix, as a vector (embedding lookup).
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || index >= tv.rows() {
            return Err(TensorError::Shape {
                kernel: KernelId::Row,
                lhs: tv.shape().to_vec(),
                rhs: vec![index],
            });
        }
        let out = Tensor::vector(tv.row(index).to_vec());
        Ok(self.push(out, Op::Row { table, index }, &[table]))
    }

    /// Divides every entry of `a` by the scalar `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let Some(sv) = self.value(s).item() else {
            return Err(self.shape_err(KernelId::DivScalar, a, s));
        };
        let out = self.map(a, |x| x / sv);
        Ok(self.push(out, Op::DivScalar(a, s), &[a, s]))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape: a second call
    /// fails until a fresh forward pass is recorded on a new tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let node = self
            .nodes
            .get(loss.0)
            .ok_or(TensorError::UnknownVar(loss.0))?;
        if node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(node.value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut by_leaf = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    by_leaf.insert(
                        Var(i),
                        Tensor {
                            shape: node.value.shape().to_vec(),
                            data: g,
                        },
                    );
                }
                Op::Untracked => {}
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf | Op::Untracked => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                match bv.rank() {
                    1 => {
                        let (m, k) = (av.rows(), av.cols());
                        self.accumulate(grads, a, |ga| {
                            for i in 0..m {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                for (x, &bj) in ga[i * k..(i + 1) * k].iter_mut().zip(bv.data()) {
                                    *x += gi * bj;
                                }
                            }
                        });
                        self.accumulate(grads, b, |gb| {
                            for i in 0..m {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                for (x, &aij) in gb.iter_mut().zip(av.row(i)) {
                                    *x += gi * aij;
                                }
                            }
                        });
                    }
                    _ => {
                        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                        self.accumulate(grads, a, |ga| {
                            // dA = G · Bᵀ
                            for i in 0..m {
                                let gr = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    ga[i * k + p] += dot(gr, bv.row(p));
                                }
                            }
                        });
                        self.accumulate(grads, b, |gb| {
                            // dB = Aᵀ · G
                            for i in 0..m {
                                let gr = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let aip = av.data()[i * k + p];
                                    if aip == 0.0 {
                                        continue;
                                    }
                                    for (x, &gij) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                        *x += aip * gij;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                self.accumulate(grads, a, |ga| {
                    // out is [r, c]; input is [c, r]
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, |ga| axpy(ga, 1.0, g));
                self.accumulate(grads, b, |gb| axpy(gb, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, |ga| axpy(ga, 1.0, g));
                self.accumulate(grads, b, |gb| axpy(gb, -1.0, g));
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                self.accumulate(grads, a, |ga| {
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *x += gi * bi;
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av.data()) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Concat { ref parts, axis } => {
                if out.rank() <= 1 || axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.accumulate(grads, p, |gp| axpy(gp, 1.0, &g[offset..offset + n]));
                        offset += n;
                    }
                } else {
                    let cols = out.cols();
                    let mut col_offset = 0;
                    for &p in parts {
                        let (pr, pc) = (self.value(p).rows(), self.value(p).cols());
                        self.accumulate(grads, p, |gp| {
                            for i in 0..pr {
                                let src = &g[i * cols + col_offset..i * cols + col_offset + pc];
                                axpy(&mut gp[i * pc..(i + 1) * pc], 1.0, src);
                            }
                        });
                        col_offset += pc;
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(a);
                self.accumulate(grads, a, |ga| {
                    for ((x, &gi), &ai) in ga.iter_mut().zip(g).zip(av.data()) {
                        if ai > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let av = self.value(a);
                self.accumulate(grads, a, |ga| {
                    for (((x, &gi), &yi), &ai) in ga.iter_mut().zip(g).zip(out.data()).zip(av.data()) {
                        if ai.abs() <= SIGMOID_CLAMP {
                            *x += gi * yi * (1.0 - yi);
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate(grads, a, |ga| {
                    for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Softmax { input, axis } => {
                self.accumulate(grads, input, |ga| {
                    for_each_lane(out.shape(), axis, |idx| {
                        let s: f64 = idx.iter().map(|&j| g[j] * out.data()[j]).sum();
                        for &j in &idx {
                            ga[j] += out.data()[j] * (g[j] - s);
                        }
                    });
                });
            }
            Op::Negate(a) => self.accumulate(grads, a, |ga| axpy(ga, -1.0, g)),
            Op::Scale(a, c) => self.accumulate(grads, a, |ga| axpy(ga, c, g)),
            Op::Shift(a) => self.accumulate(grads, a, |ga| axpy(ga, 1.0, g)),
            Op::Sum(a) => self.accumulate(grads, a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::FrobeniusSq(a) => {
                let av = self.value(a);
                self.accumulate(grads, a, |ga| axpy(ga, 2.0 * g[0], av.data()));
            }
            Op::Manhattan(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let signs: Vec<f64> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| sign(x - y))
                    .collect();
                self.accumulate(grads, a, |ga| axpy(ga, g[0], &signs));
                self.accumulate(grads, b, |gb| axpy(gb, -g[0], &signs));
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                self.accumulate(grads, a, |ga| axpy(ga, g[0], bv.data()));
                self.accumulate(grads, b, |gb| axpy(gb, g[0], av.data()));
            }
            Op::Slice { input, start } => {
                self.accumulate(grads, input, |ga| axpy(&mut ga[start..start + g.len()], 1.0, g));
            }
            Op::Row { table, index } => {
                let c = self.value(table).cols();
                self.accumulate(grads, table, |gt| axpy(&mut gt[index * c..(index + 1) * c], 1.0, g));
            }
            Op::DivScalar(a, s) => {
                let sv = self.value(s).data()[0];
                self.accumulate(grads, a, |ga| axpy(ga, 1.0 / sv, g));
                // d(x/s)/ds = -x/s² = -out/s
                let gs = -dot(g, out.data()) / sv;
                self.accumulate(grads, s, |gsv| gsv[0] += gs);
            }
            Op::Log(a) => {
                let av = self.value(a);
                self.accumulate(grads, a, |ga| {
                    for ((x, &gi), &ai) in ga.iter_mut().zip(g).zip(av.data()) {
                        *x += gi / ai;
                    }
                });
            }
            Op::Clamp { input, lo, hi } => {
                let av = self.value(input);
                self.accumulate(grads, input, |ga| {
                    for ((x, &gi), &ai) in ga.iter_mut().zip(g).zip(av.data()) {
                        if (lo..=hi).contains(&ai) {
                            *x += gi;
                        }
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Calls `f` with the flat indices of every lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(Vec<usize>)) {
    match (shape.len(), axis) {
        (1, 0) => f((0..shape[0]).collect()),
        (2, 0) => {
            let (r, c) = (shape[0], shape[1]);
            for j in 0..c {
                f((0..r).map(|i| i * c + j).collect());
            }
        }
        (2, 1) => {
            let c = shape[1];
            for i in 0..shape[0] {
                f((i * c..(i + 1) * c).collect());
            }
        }
        _ => {}
    }
}

fn softmax_lane(data: &mut [f64], idx: &[usize]) {
    let max = idx
        .iter()
        .map(|&j| data[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &j in idx {
        let e = (data[j] - max).exp();
        data[j] = e;
        total += e;
    }
    for &j in idx {
        data[j] /= total;
    }
}
